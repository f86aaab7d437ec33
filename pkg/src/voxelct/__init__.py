from .app import run
