from .bundle import EXPERIMENTS, ExperimentSpec, ResultBundle, SpecError
from .experiments import RUNNERS, run
