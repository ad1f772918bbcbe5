//! Shared workloads for the criterion benches in `benches/`.

use tbtm_core::experiment::{bench_records, experiment_keys};
use tbtm_core::pipeline::encrypt_stream;
use tbtm_core::tokenchain::EncryptedRecord;

/// The timing stream of the `bench` command, encrypted once up front.
pub fn workload(n: usize) -> Vec<EncryptedRecord> {
    encrypt_stream(&bench_records(n), &experiment_keys()).expect("bench records are valid")
}

#[cfg(test)]
mod tests {
    #[test]
    fn workload_has_requested_length() {
        assert_eq!(super::workload(37).len(), 37);
    }
}
