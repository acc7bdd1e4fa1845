"""ハンドラーパッケージ"""
