"""データパッケージ（合成データ生成とファイル形式）"""
