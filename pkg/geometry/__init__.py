"""幾何パッケージ（記述子の検証・平坦化とカーネル）"""
