"""defectkit: data engineering and imbalance-aware evaluation for industrial
surface anomaly detection.

Submodules:
    rng        deterministic randomness contract (seed paths)
    config     pipeline configuration schema and defaults
    imagetypes patches, masks, labels
    synthesis  stochastic-walk defect textures with exact masks
    patches    extraction, cropping, augmentation, preprocessing
    stream     mixed supervised stream sampling and fraction schedules
    metrics    MCC / AUROC / optimal-F1 / PRO evaluation
    dataio     folder splits, HDF5 container, predictions CSV
    cli        command-line entry point
"""

__version__ = "0.1.0"
