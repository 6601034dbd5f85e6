"""chemolab"""

VERSION = '0.1.0'
