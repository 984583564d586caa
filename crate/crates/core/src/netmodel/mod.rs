//! Network modeling: case parsing, the AC admittance model and the DC
//! (Laplacian) model.

mod admittance;
mod case;
mod dc;
mod state;

pub use admittance::{build_admittance, AdmittanceModel, BranchAdmittance};
pub use case::{components, parse_case, Branch, Bus, BusType, Generator, GridCase, Load, QuadCost};
pub use dc::{build_dc, DcModel};
pub use state::{
    ac_injections, branch_flows, complex_injections, dc_injections, flow_sensitivity, injection_jacobian, BranchFlow,
    ComplexState, Coords, FlowSensitivity, Injections,
};
