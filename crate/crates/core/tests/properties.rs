mod invariants;

#[test]
fn seed_reproducibility() {
    invariants::seed_reproducibility().unwrap();
}

#[test]
fn count_conservation() {
    invariants::count_conservation().unwrap();
}

#[test]
fn observation_normalization() {
    invariants::observation_normalization().unwrap();
}

#[test]
fn policy_row_normalization() {
    invariants::policy_row_normalization().unwrap();
}

#[test]
fn mixture_normalization() {
    invariants::mixture_normalization().unwrap();
}
