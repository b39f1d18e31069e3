import sys

from .app import App

sys.exit(App().run())
