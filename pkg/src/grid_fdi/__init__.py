__version__ = "0.1.0"


def main() -> None:
    from grid_fdi.cli import cli

    cli()
