"""Self-paced curriculum learning for late-fusion multimodal conversation classifiers."""
from .dataset import Corpus, Conversation, SynthConfig, batches, generate, load_jsonl, save_jsonl
from .estimator import SPCLClassifier
from .fusion import ModalModel
from .spcl import Scheduler, measure, spcl_loss
from .trainer import RunLog, TrainConfig, evaluate, run

__version__ = "0.1.0"
