//! Reference peer for the wire protocol, backed by the built-in synthetic
//! domain and oracle. Used by conformance tests and as a stand-in when no
//! external chemistry backend is available.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;

use crate::domain::{DomainSpec, OracleSpec};
use crate::evolve::exact_link_oracle;
use crate::generate::{generate_rule_based, GeneratorRequest};
use crate::protocol::{response_json, Payload, Request};
use crate::rng::stable_hash;

pub struct OracleServer {
    pub spec: DomainSpec,
    pub oracle: OracleSpec,
}

impl OracleServer {
    pub fn handle(&self, req: &Request) -> Result<Payload, String> {
        let spec = &self.spec;
        let canon = |m: &str| spec.canonicalize(m).map_err(|e| e.to_string());
        match req {
            Request::Score { mol } => self.oracle.score(&canon(mol)?, spec).map(Payload::Value).map_err(|e| e.to_string()),
            Request::Canon { mol } => canon(mol).map(Payload::Mol),
            Request::Link { a, b } => {
                let (a, b) = (canon(a)?, canon(b)?);
                let mut d = spec.clone();
                exact_link_oracle(&a, &b, &mut d).map(Payload::Prob).map_err(|e| e.to_string())
            }
            Request::Gen { context, edges, n } => {
                let context: Vec<String> = context.iter().map(|m| canon(m)).collect::<Result<_, _>>()?;
                let mut key = Vec::new();
                for m in &context {
                    key.extend_from_slice(m.as_bytes());
                    key.push(0);
                }
                key.extend_from_slice(&(*n as u64).to_le_bytes());
                let req = GeneratorRequest {
                    context_members: context,
                    context_edges: edges.clone(),
                    n: *n,
                    rng_seed: stable_hash(0, &key),
                };
                Ok(Payload::Mols(generate_rule_based(&req, spec)))
            }
        }
    }

    /// Answers one request line. Unparseable lines get an error reply with
    /// id 0 when no id could be read.
    pub fn answer(&self, line: &str) -> String {
        let (id, req) = Request::parse(line);
        let outcome = req.and_then(|r| self.handle(&r));
        response_json(id.unwrap_or(0), &outcome).to_string()
    }

    pub fn serve<R: BufRead, W: Write>(&self, input: R, mut output: W) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.answer(&line))?;
            output.flush()?;
        }
        Ok(())
    }

    pub fn serve_stdio(&self) -> io::Result<()> {
        let stdin = io::stdin();
        self.serve(stdin.lock(), io::stdout().lock())
    }

    /// Serves connections one after another until the listener fails.
    pub fn serve_tcp(&self, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let reader = BufReader::new(stream.try_clone()?);
            // A client hanging up mid-session is not a server failure.
            let _ = self.serve(reader, BufWriter::new(stream));
        }
        Ok(())
    }
}
