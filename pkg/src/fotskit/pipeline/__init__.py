from .config import ModelConfig, load_config, parse_config, toy_config
from .evaluate import EvalResult, evaluate, evaluate_spotting
from .infer import Detection, InferResult, infer, infer_two_stage
from .model import Backbone, DetectionHead, FOTSModel
from .train import Trainer, TrainResult, train_joint, train_model, train_two_stage
