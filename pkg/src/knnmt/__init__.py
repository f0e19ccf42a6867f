"""Nearest-neighbour translation datastores: product-quantized IVF indexes, subset retrieval and interpolated decoding."""

from __future__ import annotations

from .corevec import KMeansResult, kmeans, nearest_centroid, squared_l2
from .corpus import ParallelCorpus, read_jsonl, synthetic_corpus
from .datastore import IndexConfig, KeyStore, TimingReport, TokenStore, build_datastore
from .errors import FormatError, InvalidArgument, InvalidState, KnnError, StorageError
from .generate import KNNConfig, interpolate, pknn, translate, translate_all
from .ivf import IVFPQIndex, SearchParams, train_ivfpq
from .pq import PQCodebook, adc_distance, adc_topk, build_lut, decode, encode, train_pq
from .subset import FlatCodes, SentenceDatastore, retrieve_subset, subset_search
from .toymodel import ToyModel, toy_model
from .transform import OPQTransform, PCATransform, train_opq, train_pca

__version__ = "0.1.0"

__all__ = [
    "FlatCodes", "FormatError", "IVFPQIndex", "IndexConfig", "InvalidArgument", "InvalidState",
    "KMeansResult", "KNNConfig", "KeyStore", "KnnError", "OPQTransform", "PCATransform", "PQCodebook",
    "ParallelCorpus", "SearchParams", "SentenceDatastore", "StorageError", "TimingReport", "TokenStore",
    "ToyModel", "adc_distance", "adc_topk", "build_datastore", "build_lut", "decode", "encode",
    "interpolate", "kmeans", "nearest_centroid", "pknn", "read_jsonl", "retrieve_subset",
    "squared_l2", "subset_search", "synthetic_corpus", "toy_model", "train_ivfpq", "train_opq",
    "train_pca", "train_pq", "translate", "translate_all",
]
