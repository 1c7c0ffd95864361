"""Entry point for python -m portraitdiff"""
from .cli.main import app

if __name__ == "__main__":
    app()
