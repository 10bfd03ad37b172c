"""`python -m ghostscan` dispatches to the command-line interface."""
from .cli import main

if __name__ == "__main__":
    main()
