from .layers import (LSTM, Activation, Conv1D, Conv2D, Dense, Dropout, FeatureAttention, Flatten, KernelTooLarge,
                     MaxPool1D, NNError, NonFinite, Reshape, ShapeMismatch, Softmax, dropout, feature_attention, leaky_relu,
                     relu, sigmoid, softmax)
from .losses import bce_loss, categorical_ce
from .network import CheckpointError, Network, load_checkpoint, read_checkpoint, save_checkpoint
from .optim import Adam, adam_step
