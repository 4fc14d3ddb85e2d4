//! Log-distance propagation used for every link in the simulated WLAN.

/// Path loss at the 1 m reference distance, dB.
pub const REFERENCE_LOSS_DB: f64 = 40.0;
/// Path-loss exponent.
pub const PATH_LOSS_EXPONENT: f64 = 3.5;

/// `PL(d) = 40 + 35·log10(max(d, 1))` dB.
pub fn path_loss_db(distance_m: f64) -> f64 {
    let d = distance_m.max(1.0);
    REFERENCE_LOSS_DB + 10.0 * PATH_LOSS_EXPONENT * d.log10()
}

pub fn rssi_dbm(tx_power_dbm: f64, distance_m: f64) -> f64 {
    tx_power_dbm - path_loss_db(distance_m)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}
