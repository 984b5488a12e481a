"""geolex: encyclopedia OCR text to geocoded gazetteer.

Pipeline stages: segment raw pages into entries, classify entries as
locations, link locations to Wikidata items, fetch their coordinates,
and render report artifacts.  See ``geolex.cli`` for the command-line
driver and the per-stage modules for the library surface.
"""

__version__ = "0.1.0"

from .classifier import EvalReport, LogisticModel, evaluate, train
from .corpus import CorpusStats, Entry, RawPage, corpus_stats, segment_pages
from .embedding import HashedTrigramEmbedder, RemoteEmbedder, cosine_similarity
from .errors import DatasetError, ProtocolError, ReplayCacheMiss, TransportError
from .geo import GeoPoint, LinkedPlace, distance_histogram, haversine_km
from .linker import LinkResult, link_batch, link_entry, rank_candidates
from .wikidata import WikidataCandidate, WikidataClient, make_transport

__all__ = [
    "__version__",
    "CorpusStats", "Entry", "RawPage", "corpus_stats", "segment_pages",
    "HashedTrigramEmbedder", "RemoteEmbedder", "cosine_similarity",
    "EvalReport", "LogisticModel", "evaluate", "train",
    "WikidataCandidate", "WikidataClient", "make_transport",
    "LinkResult", "link_batch", "link_entry", "rank_candidates",
    "GeoPoint", "LinkedPlace", "distance_histogram", "haversine_km",
    "DatasetError", "ProtocolError", "ReplayCacheMiss", "TransportError",
]
