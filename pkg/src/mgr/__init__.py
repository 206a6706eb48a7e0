"""Knowledge-enhanced cross-modal GCN pipeline for monetary-policy-call prediction."""
from .corpus import Asset, Horizon, Labels, Sample, hash_embed, load_dataset, synth_generate
from .graph_builder import CrossModalGraph, Variant, build_graph
from .kg_store import KnowledgeGraph, link_entities, load_kg, retrieve_knowledge, temporal_view
from .model import ModelConfig, ModelParams, backward, forward, init_params

__version__ = "0.1.0"
