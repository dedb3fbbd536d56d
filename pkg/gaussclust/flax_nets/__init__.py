from .convnet import *
from .mlp import *
from .attention import *
from .configs import *
from .clusternet import *
