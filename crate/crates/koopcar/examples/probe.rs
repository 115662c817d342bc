use koopcar::koopman::*;
use koopcar::eso::spectral_radius;
use nalgebra::DVector;

fn main() {
    let ds = TrajectoryDataset::load_json(std::path::Path::new("/tmp/koop/data.json")).unwrap();
    let cfg = TrainingConfig { use_momentum: true, epochs: 60, ..Default::default() };
    let (model, hist) = train(&ds, &cfg).unwrap();
    println!("epochs: first 5 train {:?}", &hist.train_loss[..5]);
    println!("epochs: last 5 train {:?}", &hist.train_loss[55..]);
    println!("epochs: last 5 val   {:?}", &hist.val_loss[55..]);
    println!("scaler_x max: {:?}", model.scaler_x.max.as_slice());
    println!("scaler_u max: {:?}", model.scaler_u.max.as_slice());
    println!("rho(A_ext) = {}", spectral_radius(&model.a).unwrap());
    // loss breakdown on a few validation sequences
    let mut l1t = 0.0; let mut l2t = 0.0; let mut n = 0;
    for seq in ds.validation_sequences().take(50) {
        let (_, l1, l2) = model.loss(seq).unwrap();
        l1t += l1; l2t += l2; n += 1;
    }
    println!("val loss breakdown: L1 {:.4} L2 {:.4} (per seq, n={n})", l1t / n as f64, l2t / n as f64);
    // worst one-step errors
    let zero = DVector::zeros(model.dims.q());
    let mut worst = (0.0f64, 0usize, 0usize);
    for (si, seq) in ds.validation_sequences().enumerate() {
        for k in 0..seq.inputs.len() {
            let z = model.lift(&seq.states[k]);
            let p = model.project(&model.predict_one(&z, &seq.inputs[k], &zero)).unwrap();
            let t = &seq.states[k+1];
            let e = (p.vy - t.vy).abs();
            if e > worst.0 { worst = (e, si, k); }
        }
    }
    println!("worst vy one-step err {:.3} at val seq {} step {}", worst.0, worst.1, worst.2);
    let seq = ds.validation_sequences().nth(worst.1).unwrap();
    println!("state there: {:?} input {:?}", seq.states[worst.2], seq.inputs[worst.2]);
}
