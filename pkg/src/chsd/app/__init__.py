"""Configuration, experiment drivers, output writers and the command-line interface."""
