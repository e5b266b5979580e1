"""Saliency-guided point-cloud toolkit: point saliency, saliency-guided
GT-database augmentation, backbone normalization kernels, confidence
correction for 3D detections, KITTI I/O and an AP evaluator."""

__version__ = "0.1.0"
