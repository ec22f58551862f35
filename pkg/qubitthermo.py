#!/usr/bin/env python3
"""
QubitThermo - Main launcher script
Runs one scenario from the command line with logging and error handling configured
"""

import sys
import os

# Add the current directory to the Python path to allow imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

def main():
    """Launch a QubitThermo scenario and exit with its status code"""
    try:
        from utils.logger import logger
        from cli_main import run

        logger.info("=" * 50)
        logger.info("QubitThermo Starting")
        logger.info("=" * 50)

        result = run(sys.argv[1:])

        logger.info(f"QubitThermo finished with exit code {result}")
        sys.exit(result)

    except ImportError as e:
        error_msg = f"Missing required dependencies: {e}"
        print(error_msg)
        print("\nPlease install required packages:")
        print("  pip install -r requirements.txt")

        try:
            from utils.logger import logger
            logger.critical(error_msg, e)
        except ImportError:
            pass  # Logging not available

        sys.exit(1)

if __name__ == "__main__":
    main()
