"""コードブックパッケージ（k-means とカーネル k-means）"""
