//! Part-based representation learning for person re-identification.
//!
//! The pipeline trains a small convolutional network under two supervisions
//! at once: a global classification loss computed from global average
//! pooling over the full feature maps, and a part loss averaged over `K`
//! body parts that are discovered unsupervised from the feature maps
//! themselves (argmax-location clustering, saliency pooling, thresholding).
//! At test time the global and per-part descriptors are concatenated and
//! matched against a gallery of unseen identities; retrieval quality is
//! reported as CMC Rank-k and mAP.
//!
//! Everything is built from scratch on a dense [`tensor::Tensor`] type and
//! a tape-based reverse-mode differentiation engine in [`graph`]; there is
//! no external ML framework.
//!
//! A walkthrough of each stage lives in the `book/` guide; the snippets
//! there mirror the doc-tests below.
//!
//! # Example
//!
//! Compute a loss and its gradients through the differentiation engine:
//!
//! ```
//! use plnet::graph::Graph;
//! use plnet::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let logits = g.leaf(Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
//! let loss = g.softmax_cross_entropy(logits, 0).unwrap();
//! assert!((g.value(loss).data()[0] - 3.0_f64.ln()).abs() < 1e-12);
//!
//! g.backward(loss).unwrap();
//! // gradient is softmax(logits) minus the one-hot label
//! let grad = g.grad(logits).data();
//! assert!((grad[0] - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
//! ```
//!
//! Generate parts from a feature map and pool them to a fixed size:
//!
//! ```
//! use plnet::partgen::{generate_parts, roi_pool_value, ROI_OUT};
//! use plnet::tensor::Tensor;
//!
//! let mut x = Tensor::zeros(&[4, 16, 8]);
//! // two channels active near the top, two near the bottom
//! for ch in 0..4 {
//!     let row = if ch < 2 { 2 } else { 13 };
//!     for col in 0..8 {
//!         x.set(&[ch, row, col], 1.0);
//!     }
//! }
//! let boxes = generate_parts(&x, 2, 0.5).unwrap();
//! assert_eq!(boxes.len(), 2);
//! assert!(boxes[0].bottom < boxes[1].top);
//! let pooled = roi_pool_value(&x, &boxes[0], ROI_OUT, ROI_OUT);
//! assert_eq!(pooled.shape(), &[4, 4, 4]);
//! ```

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod partgen;
pub mod pltn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
