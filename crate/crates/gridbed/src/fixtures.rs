//! Scenarios shipped inside the binary, addressable as `bundled:<name>`.

pub const FIG4_PEAKSHAVE: &str = include_str!("../fixtures/fig4_peakshave.json");
pub const WASTAGE_OFFICE: &str = include_str!("../fixtures/wastage_office.json");

pub const NAMES: [&str; 2] = ["fig4_peakshave", "wastage_office"];

pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "fig4_peakshave" => Some(FIG4_PEAKSHAVE),
        "wastage_office" => Some(WASTAGE_OFFICE),
        _ => None,
    }
}
