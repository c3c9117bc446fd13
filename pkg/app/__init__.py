# Make app a package for submodule imports
