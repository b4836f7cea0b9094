# Package marker so the template files resolve via importlib.resources.
