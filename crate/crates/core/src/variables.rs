//! Registry of the meta-variables the pipeline knows about.
//!
//! The 25 model variables are 21 recorded time-varying channels, 3 statics and
//! the derived FiO2 estimate. Additional blood-gas context channels (pH, pCO2,
//! ...) are recognised so that loading does not warn about them, but they are
//! not featurized.

use serde::{Deserialize, Serialize};

pub const FIO2: &str = "fio2";
pub const SPO2: &str = "spo2";
pub const SUPP_O2: &str = "supp_o2";
pub const PAO2: &str = "pao2";
pub const SUPP_FIO2: &str = "supp_fio2";
pub const SAO2: &str = "sao2";
pub const GCS_EYE: &str = "gcs_eye";
pub const GCS_VERBAL: &str = "gcs_verbal";
pub const PERITONEAL_DIALYSIS: &str = "peritoneal_dialysis";
pub const PEAK_PRESSURE: &str = "peak_pressure";
pub const SPONT_BREATHING: &str = "spont_breathing";
pub const GCS_MOTOR: &str = "gcs_motor";
pub const VENT_MODE: &str = "vent_mode";
pub const RASS: &str = "rass";
pub const EXTUBATION: &str = "extubation";
pub const TRACHEOTOMY: &str = "tracheotomy";
pub const ST2: &str = "st2";
pub const RESP_RATE: &str = "resp_rate";
pub const PEEP: &str = "peep";
pub const URINE_OUT: &str = "urine_out";
pub const VENT_STATE: &str = "vent_state";

pub const FIO2_ESTIMATE: &str = "fio2_estimate";

pub const AGE: &str = "age";
pub const WEIGHT: &str = "weight";
pub const ADMISSION_ORIGIN: &str = "admission_origin";

pub const PH: &str = "ph";
pub const HB: &str = "hb";
pub const METHB: &str = "methb";
pub const COHB: &str = "cohb";
pub const PCO2: &str = "pco2";
pub const BE: &str = "be";
pub const HCO3: &str = "hco3";
pub const LACTATE: &str = "lactate";
pub const ETCO2: &str = "etco2";
pub const TEMPERATURE: &str = "temperature";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    /// Recorded time series, model input.
    Recorded,
    /// Per-stay constant.
    Static,
    /// Computed by the pipeline on the grid.
    Derived,
    /// Recorded, used only as blood-gas context.
    Context,
}

#[derive(Debug, Clone, Copy)]
pub struct VariableInfo {
    pub id: &'static str,
    pub label: &'static str,
    pub unit: &'static str,
    pub kind: VariableKind,
}

const fn var(id: &'static str, label: &'static str, unit: &'static str, kind: VariableKind) -> VariableInfo {
    VariableInfo { id, label, unit, kind }
}

use VariableKind::*;

pub const REGISTRY: &[VariableInfo] = &[
    var(FIO2, "FiO2 (ventilator)", "%", Recorded),
    var(SPO2, "SpO2", "%", Recorded),
    var(SUPP_O2, "Supplemental oxygen", "l/min", Recorded),
    var(PAO2, "PaO2", "mmHg", Recorded),
    var(SUPP_FIO2, "Supplemental FiO2 %", "%", Recorded),
    var(SAO2, "SaO2", "%", Recorded),
    var(GCS_EYE, "GCS eye opening", "", Recorded),
    var(GCS_VERBAL, "GCS response", "", Recorded),
    var(PERITONEAL_DIALYSIS, "Peritoneal dialysis", "", Recorded),
    var(PEAK_PRESSURE, "Peak pressure", "cmH2O", Recorded),
    var(SPONT_BREATHING, "Spontaneous breathing", "", Recorded),
    var(ADMISSION_ORIGIN, "Admission origin", "", Static),
    var(GCS_MOTOR, "GCS motor", "", Recorded),
    var(WEIGHT, "Weight", "kg", Static),
    var(VENT_MODE, "Ventilator mode group", "", Recorded),
    var(RASS, "RASS", "", Recorded),
    var(AGE, "Patient age", "years", Static),
    var(EXTUBATION, "Extubation time-point", "", Recorded),
    var(TRACHEOTOMY, "Tracheotomy state", "", Recorded),
    var(ST2, "ST2 (ECG)", "mm", Recorded),
    var(RESP_RATE, "Respiratory rate", "1/min", Recorded),
    var(PEEP, "PEEP", "cmH2O", Recorded),
    var(URINE_OUT, "Fluid output", "ml/h", Recorded),
    var(FIO2_ESTIMATE, "Current FiO2 estimate", "fraction", Derived),
    var(VENT_STATE, "Ventilation state", "", Recorded),
    var(PH, "pH", "", Context),
    var(HB, "Hb", "g/dl", Context),
    var(METHB, "MetHb", "%", Context),
    var(COHB, "COHb", "%", Context),
    var(PCO2, "pCO2", "mmHg", Context),
    var(BE, "Base excess", "mmol/l", Context),
    var(HCO3, "HCO3", "mmol/l", Context),
    var(LACTATE, "Lactate", "mmol/l", Context),
    var(ETCO2, "etCO2", "mmHg", Context),
    var(TEMPERATURE, "Body temperature", "degC", Context),
];

pub fn lookup(id: &str) -> Option<&'static VariableInfo> {
    REGISTRY.iter().find(|v| v.id == id)
}

pub fn is_known(id: &str) -> bool {
    lookup(id).is_some()
}

/// The 25 model variables in ranking order.
pub fn model_variables() -> impl Iterator<Item = &'static VariableInfo> {
    REGISTRY.iter().filter(|v| v.kind != Context)
}

pub fn recorded_model_variables() -> impl Iterator<Item = &'static VariableInfo> {
    REGISTRY.iter().filter(|v| v.kind == Recorded)
}

pub fn static_variables() -> impl Iterator<Item = &'static VariableInfo> {
    REGISTRY.iter().filter(|v| v.kind == Static)
}
