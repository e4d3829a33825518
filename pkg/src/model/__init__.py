from src.model.backbone import BackboneConfig, FeatureMapPyramid, PyramidBackbone
from src.model.fusion import BatchInstanceNorm, ChannelGate, PyramidFusion, SpatialAttention
from src.model.heads import CamHead, HeadOutputs, IdHead, variance_of
from src.model.network import MultiTaskReID, NetworkOutputs

__all__ = [
    "BackboneConfig",
    "BatchInstanceNorm",
    "CamHead",
    "ChannelGate",
    "FeatureMapPyramid",
    "HeadOutputs",
    "IdHead",
    "MultiTaskReID",
    "NetworkOutputs",
    "PyramidBackbone",
    "PyramidFusion",
    "SpatialAttention",
    "variance_of",
]
