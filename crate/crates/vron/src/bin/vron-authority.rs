//! Creates an attestation authority key and the default verifier policy.

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use rand::rngs::OsRng;
use vron::cli::{AUTHORITY_KEY_FILE, POLICY_FILE};
use vron::io::{default_trust, save_key, save_policy};
use vron_core::crypto::{generate_keypair, KeyPair};
use vron_core::verifier::VerifierPolicy;

#[derive(Parser)]
#[command(about = "Create an authority key and a default verifier policy")]
struct Args {
    /// Directory for authority.vkey and policy.vpolicy.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Derive the key from this seed instead of the OS RNG.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let key = match args.seed {
        Some(s) => {
            let mut seed = [0u8; 32];
            seed[..8].copy_from_slice(&s.to_be_bytes());
            KeyPair::from_seed(seed)
        }
        None => generate_keypair(&mut OsRng)?,
    };
    let key_path = args.out_dir.join(AUTHORITY_KEY_FILE);
    let policy_path = args.out_dir.join(POLICY_FILE);
    save_key(&key_path, &key)?;
    save_policy(&policy_path, &VerifierPolicy::new(default_trust(key.public_key())))?;
    println!("authority key  {}", key_path.display());
    println!("policy         {}", policy_path.display());
    println!("public key     {}", hex(key.public_key().as_bytes()));
    Ok(())
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}
