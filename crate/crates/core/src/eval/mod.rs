//! Cluster-to-label mapping, classification metrics and the clustering
//! baselines used for comparison.

pub mod cluster;
pub mod hungarian;
pub mod metrics;
pub mod pca;

pub use cluster::{agglomerative_ward, kmeans, KMeans};
pub use hungarian::{hungarian, Assignment};
pub use metrics::{evaluate_clusters, map_clusters, metrics, Averaging, ClusterMapping, ConfusionTable, Metrics, MetricsReport};
pub use pca::pca_project;
