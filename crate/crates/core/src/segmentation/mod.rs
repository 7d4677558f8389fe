//! Component segmentation: dataset layout, a small trainable FCN, the dice
//! training objective, mean-IoU evaluation and region extraction.

pub mod augment;
pub mod dataset;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod net;
mod schema;
pub mod train;

pub use augment::AugmentConfig;
pub use dataset::{
    shapes_schema, split_dataset, synthetic_shapes, Dataset, DatasetError, DatasetSplit, Sample,
};
pub use infer::{
    clean_class_mask, connected_components, regions, segment, ClassRegion, ModelError,
    ModelManifest, PaletteSegmenter, SegModel, SegmentError, Segmenter, MIN_REGION_FRACTION,
};
pub use loss::{dice_loss, dice_loss_grad, LossError, DICE_EPS};
pub use metrics::{compute_iou, compute_iou_with, ConfusionCounts, IoUReport};
pub use net::{NetError, ARCHITECTURES, DEFAULT_ARCH};
pub use schema::{ClassSchema, SchemaError, BACKGROUND};
pub use train::{lr_at_epoch, train, train_dataset, EpochMetrics, TrainError, TrainOutcome, TrainingConfig};
