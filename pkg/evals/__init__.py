"""評価パッケージ（分類器・交差検証・計測）"""
