//! Discriminative and unsupervised baselines: a GCN classifier and an
//! EM-fitted full-covariance Gaussian mixture. The flow-only baseline is a
//! [`crate::flow::GcFlowModel`] with identity adjacency.

mod gcn;
mod gmm;

pub use gcn::{gcn_loss, GcnConfig, GcnModel, GcnOutput, PROB_FLOOR};
pub use gmm::{component_classes, em_fit, gmm_classify, labeled_class_means, EmConfig, EmGmm};
