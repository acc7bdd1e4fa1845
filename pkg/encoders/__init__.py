"""符号化パッケージ（VLAD と kernel VLAD 系の符号化方式）"""
