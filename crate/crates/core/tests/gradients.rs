mod common;

use common::{grads, raster, GradReport};

#[test]
fn rasterizer_parameter_gradients() {
    for (f, name) in raster::FAMILIES.iter().enumerate() {
        let r = raster::check_family(f, 100, 11 + f as u64);
        println!("{name}: {} cases, worst relative error {:.2e}", r.cases, r.worst);
        assert!(r.worst < 1e-3, "{name}: worst relative error {}", r.worst);
    }
}


fn check(group: &str, reports: Vec<(&'static str, GradReport)>, tol: f64) {
    for (name, r) in reports {
        println!("{group} {name}: {} cases, worst relative error {:.2e}", r.cases, r.worst);
        assert!(r.cases >= 100);
        assert!(r.worst < tol, "{group} {name}: worst relative error {}", r.worst);
    }
}

#[test]
fn field_parameter_and_position_gradients() {
    check("field", grads::field_parameter_and_position_gradients(), 1e-4);
}

#[test]
fn photometric_loss_gradient() {
    check("photometric", grads::photometric_loss_gradient(), 1e-4);
}

#[test]
fn coupling_loss_gradients() {
    check("alignment+projection", grads::coupling_loss_gradients(), 1e-4);
}

#[test]
fn tight_opacity_gradients() {
    check("tight opacity", grads::tight_opacity_gradients(), 1e-4);
}

#[test]
fn volumetric_consistency_gradients() {
    check("volumetric", grads::volumetric_consistency_gradients(), 1e-4);
}

#[test]
fn eikonal_gradient() {
    check("eikonal", grads::eikonal_gradient(), 1e-5);
}
