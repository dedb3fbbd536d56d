from .genfunc import *
from .utils import *
