import sys

from src.cli import main

if __name__ == "__main__":
    # os.environ["NOF1_LOG_LEVEL"] = "DEBUG"  # For detailed debugging
    # os.environ["NOF1_LOG_FILE"] = "nof1.log"  # For file logging
    sys.exit(main())
