"""データモデルパッケージ"""
