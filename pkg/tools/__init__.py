"""CLI のサブコマンドと実行設定"""
