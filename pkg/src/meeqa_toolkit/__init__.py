"""Question answering over meeting transcripts: data, model, decision, scoring."""

from .decision import DecisionConfig, DecisionGrid, SpanPrediction, decide, tune_decision
from .evaluation import EvalReport, Prediction, evaluate, first_utterance_baseline, krippendorff_alpha
from .model import LossVariant, LossWeights, ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train
from .preprocess import CleanReport, clean_text, preprocess_meeting, preprocess_meetings
from .representation import RepresentationMode, SpeakerMode, Vocabulary, encode_dataset, render_sequence
from .transcript import AnswerAnnotation, Meeting, QAInstance, Question, Utterance, extract_question_instances

__version__ = "0.1.0"

__all__ = [
    "AnswerAnnotation", "CleanReport", "DecisionConfig", "DecisionGrid", "EvalReport", "LossVariant",
    "LossWeights", "Meeting", "ModelConfig", "Prediction", "QAInstance", "Question", "RepresentationMode",
    "SpanPrediction", "SpeakerMode", "TrainConfig", "Utterance", "Vocabulary", "clean_text", "decide",
    "encode_dataset", "evaluate", "extract_question_instances", "first_utterance_baseline",
    "krippendorff_alpha", "load_checkpoint", "preprocess_meeting", "preprocess_meetings",
    "render_sequence", "save_checkpoint", "train", "tune_decision",
]
