// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod audit;
pub mod extract;
pub mod geometry;
pub mod knockout;
pub mod patch;
pub mod power;
pub mod probe;
pub mod report;
