import logging
import os

import pygame

logger = logging.getLogger(__name__)


class FontManager:
    def __init__(self, font_path=None):
        self.fonts = {}
        self.font_path = font_path or os.environ.get("TOOTHNET_FONT")

    def get_font(self, size):
        """Get a font object with the specified size."""
        if not pygame.font.get_init():
            pygame.font.init()
        if size not in self.fonts:
            if self.font_path is None:
                self.fonts[size] = pygame.font.Font(None, size)
                return self.fonts[size]
            try:
                self.fonts[size] = pygame.font.Font(self.font_path, size)
            except (pygame.error, OSError) as e:
                logger.warning("could not load font from %s (%s); using system font", self.font_path, e)
                self.fonts[size] = pygame.font.SysFont("arial", size)
        return self.fonts[size]


# Create a global font manager instance
font_manager = FontManager()
