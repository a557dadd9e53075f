//! Prints the curve order on a 9x9 patch grid and the skeleton/enclave map
//! of a well- and an ill-balanced split.
//!
//! `cargo run --example peano_partition -- 4` uses four partitions.

use taskbench::partition::{Balance, CellClass, Decomposition};

fn show(d: &Decomposition, m: usize) {
    for iy in (0..m).rev() {
        let row: String = (0..m)
            .map(|ix| {
                let g = iy * m + ix;
                let owner = char::from_digit(d.owner[g] as u32 % 36, 36).unwrap();
                match d.classes[g] {
                    CellClass::Skeleton => owner.to_ascii_uppercase(),
                    CellClass::Enclave => '.',
                }
            })
            .collect();
        println!("  {row}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parts: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let m = 9;
    let d = Decomposition::new(m, Balance::Well, parts)?;
    println!("curve position of each patch (origin bottom left):");
    for iy in (0..m).rev() {
        let row: Vec<String> = (0..m).map(|ix| format!("{:3}", d.order.sfc_index(iy * m + ix))).collect();
        println!(" {}", row.join(""));
    }
    for balance in [Balance::Well, Balance::Ill] {
        let d = Decomposition::new(m, balance, parts)?;
        println!(
            "\n{} split into {:?}: {} skeleton, {} enclave patches (skeletons show their owner)",
            balance.name(),
            d.sizes(),
            d.skeleton_count(),
            d.enclave_count()
        );
        show(&d, m);
    }
    Ok(())
}
