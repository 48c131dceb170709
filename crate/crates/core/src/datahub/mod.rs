//! Data ingestion and preparation: speed matrices, weighted adjacencies,
//! supervised windowing and synthetic desk-scale datasets.

mod adjacency;
mod speed;
mod synthetic;
mod window;

pub use adjacency::WeightedAdjacency;
pub use speed::{load_speed_csv, SpeedMatrix};
pub use synthetic::{generate_synthetic, SyntheticSpec, Wave};
pub use window::{sliding_windows, window, NormStats, WindowedDataset};

pub use adjacency::build_adjacency;
