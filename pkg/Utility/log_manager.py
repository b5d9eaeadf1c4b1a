import logging
import sys

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


class LogManager:
    def __init__(self):
        self.configured = False
        self.level = logging.INFO

    def setup(self, verbose=False):
        """Configure the root logger once; later calls only adjust the level."""
        self.level = logging.DEBUG if verbose else logging.INFO
        root = logging.getLogger()
        if not self.configured:
            handler = logging.StreamHandler(sys.stderr)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)
            self.configured = True
        root.setLevel(self.level)
        return root


# Create a global instance
log_manager = LogManager()


def setup_logging(verbose=False):
    return log_manager.setup(verbose)
