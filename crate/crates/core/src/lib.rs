//! Secure aggregation for federated training: secure-sum protocols over
//! `Z_{2^b}`, encrypted transports with cost accounting, a Paillier baseline,
//! a small neural network, the federated training loop and closed-form cost
//! models.

pub mod bench;
pub mod costmodel;
pub mod federation;
pub mod neuralnet;
pub mod paillier;
pub mod protocols;
pub mod ring;
pub mod rng;
pub mod transport;
pub mod verify;
