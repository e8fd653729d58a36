// SPDX-License-Identifier: Apache-2.0

//! Protection mechanisms: LDP over bucket ordinals, Paillier encryption with
//! fixed-point encoding, and additive secret sharing.

pub mod fixed_point;
pub mod ldp;
pub mod paillier;
pub mod secret_sharing;

pub use fixed_point::FixedPointCodec;
pub use ldp::{LdpConfig, LdpKind};
pub use paillier::{paillier_keygen, CipherScalar, PaillierKeyPair, PrivateKey, PublicKey};
pub use secret_sharing::{Dealer, Field, KeyedDealer, ShareFrame};
