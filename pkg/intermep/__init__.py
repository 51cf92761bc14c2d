from . import data
from . import fit
from . import io
from . import layers
from . import losses
from . import maths
from . import mep
from . import metrics
from . import model
from . import optim
from . import sampling
from . import tensor
from . import utils

from .__version__ import __version__
