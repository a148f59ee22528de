use rand::Rng;

use super::{
    boundary_distance, check_digest, Outcome, Party, ProtocolError, ProtocolMessage, ViewEntry,
};
use crate::adversary::{self, AttackStrategy};
use crate::engine::{Engine, KeyId, KeyPair, MockCiphertext, PublicKey, SlotVector};
use crate::scenario::{Mode, Scenario};
use crate::shuffle::{self, Permutation, ShufflePlan};
use crate::workload::{self, SlotwiseModel};

/// Canary values must sit at least this many quantization steps from a cell boundary.
const BOUNDARY_MARGIN: f64 = 0.25;

pub type Outbox = Vec<(Party, ProtocolMessage)>;

pub trait PartyMachine: Send {
    fn party(&self) -> Party;

    /// Messages to send before anything is received.
    fn start(&mut self) -> Result<Outbox, ProtocolError> {
        Ok(Vec::new())
    }

    fn handle(&mut self, from: Party, msg: ProtocolMessage) -> Result<Outbox, ProtocolError>;

    fn is_done(&self) -> bool;

    /// Plaintext values this party has held, for privacy audits.
    fn view(&self) -> &[ViewEntry];
}

fn client_key(s: &Scenario) -> KeyPair {
    KeyPair::generate(KeyId::CLIENT, s.sub_seed(Party::Client, "key"))
}

fn provider_key(s: &Scenario) -> KeyPair {
    KeyPair::generate(KeyId::PROVIDER, s.sub_seed(Party::Provider, "key"))
}

fn unexpected(party: Party, from: Party, msg: &ProtocolMessage) -> ProtocolError {
    ProtocolError::Unexpected {
        party,
        from,
        message: msg.name(),
    }
}

enum ClientState {
    Start,
    Submitted,
    AwaitUnmask { masked: Vec<f64> },
    Done,
}

pub struct Client {
    scenario: Scenario,
    engine: Engine,
    keys: KeyPair,
    x: Vec<f64>,
    state: ClientState,
    result_seen: bool,
    outcome: Option<Outcome>,
    permutation: Option<Permutation>,
    view: Vec<ViewEntry>,
}

impl Client {
    pub fn new(scenario: &Scenario) -> Self {
        let x = scenario.client_input();
        Client {
            engine: Engine::new(scenario.slots, scenario.noise_model(Party::Client)),
            keys: client_key(scenario),
            view: vec![ViewEntry::values("x", &x)],
            x,
            scenario: scenario.clone(),
            state: ClientState::Start,
            result_seen: false,
            outcome: None,
            permutation: None,
        }
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    /// Permutation revealed at unmask time, if the run got that far.
    pub fn permutation(&self) -> Option<&Permutation> {
        self.permutation.as_ref()
    }

    pub fn secret_material(&self) -> [u8; 32] {
        *self.keys.secret.material()
    }

    fn abort(&mut self, reason: String) -> Outbox {
        self.state = ClientState::Done;
        self.outcome = Some(Outcome::Aborted {
            by: Party::Client,
            reason: reason.clone(),
        });
        vec![(Party::Provider, ProtocolMessage::Abort { reason })]
    }

    fn on_check_request(
        &mut self,
        masked_ct: MockCiphertext,
        share: crate::engine::PartialShare,
        positions: Vec<u32>,
    ) -> Result<Outbox, ProtocolError> {
        let s = &self.scenario;
        if s.mode == Mode::Legacy {
            let plain = match self
                .engine
                .combine(&[share], &masked_ct, Some(&self.keys.secret))
            {
                Ok(v) => v.into_vec(),
                Err(e) => {
                    self.state = ClientState::Done;
                    self.outcome = Some(Outcome::Aborted {
                        by: Party::Client,
                        reason: format!("cannot open result: {e}"),
                    });
                    return Ok(Vec::new());
                }
            };
            self.view.push(ViewEntry::values("result", &plain));
            let value = plain[..s.d].to_vec();
            self.view.push(ViewEntry::values("output", &value));
            self.state = ClientState::Done;
            self.outcome = Some(Outcome::Delivered { value });
            return Ok(Vec::new());
        }

        let plain = match self
            .engine
            .combine(&[share], &masked_ct, Some(&self.keys.secret))
        {
            Ok(v) => v.into_vec(),
            Err(e) => return Ok(self.abort(format!("cannot combine masked result: {e}"))),
        };
        let active = s.active();
        if positions.iter().any(|&p| p as usize >= active) {
            return Ok(self.abort("canary position out of range".into()));
        }
        let canaries: Vec<f64> = positions.iter().map(|&p| plain[p as usize]).collect();
        let honest = check_digest(&canaries, s.quant_step);
        let digest = match &s.strategy {
            AttackStrategy::LyingClient => adversary::lying_client_digest(s),
            AttackStrategy::ReplayClient { digest } => *digest,
            _ => honest,
        };
        let masked = plain[..active].to_vec();
        self.view.push(ViewEntry::values("masked_result", &masked));
        self.state = ClientState::AwaitUnmask { masked };
        Ok(vec![(
            Party::Provider,
            ProtocolMessage::CheckResponse {
                hash_digest: digest,
            },
        )])
    }

    fn on_unmask(
        &mut self,
        masked: Vec<f64>,
        rand: SlotVector,
        perm: Vec<u32>,
    ) -> Result<Outbox, ProtocolError> {
        let s = &self.scenario;
        let active = s.active();
        if rand.len() != active || perm.len() != active {
            return Ok(self.abort("unmask vectors have the wrong length".into()));
        }
        if rand.as_slice().iter().any(|r| r.abs() < s.r_min) {
            return Ok(self.abort("mask entry below the floor".into()));
        }
        let perm = match Permutation::from_forward(perm.iter().map(|&p| p as usize).collect()) {
            Ok(p) => p,
            Err(_) => return Ok(self.abort("unmask permutation is not a bijection".into())),
        };
        let unmasked: Vec<f64> = masked
            .iter()
            .zip(rand.as_slice())
            .map(|(v, r)| v / r)
            .collect();
        let original = perm.unapply(&unmasked);
        let value = original[..s.d].to_vec();
        self.view.push(ViewEntry::values("rand", rand.as_slice()));
        self.view.push(ViewEntry::values("output", &value));
        self.permutation = Some(perm);
        self.state = ClientState::Done;
        self.outcome = Some(Outcome::Delivered { value });
        Ok(Vec::new())
    }
}

impl PartyMachine for Client {
    fn party(&self) -> Party {
        Party::Client
    }

    fn start(&mut self) -> Result<Outbox, ProtocolError> {
        let s = &self.scenario;
        if s.d + s.m > s.slots {
            return Err(ProtocolError::Invalid(
                "input too long for the slot count".into(),
            ));
        }
        let mut layout = self.x.clone();
        layout.resize(s.slots, 0.0);
        let ct = self
            .engine
            .encrypt(&SlotVector::new(layout)?, &self.keys.public)?;
        self.state = ClientState::Submitted;
        Ok(vec![(Party::Provider, ProtocolMessage::SubmitInput { ct })])
    }

    fn handle(&mut self, from: Party, msg: ProtocolMessage) -> Result<Outbox, ProtocolError> {
        if let (Party::Server, ProtocolMessage::EvalResult { .. }) = (from, &msg) {
            // Only the provider-supplied ciphertext is ever opened; the broadcast copy just has
            // to arrive, in any order relative to the provider's messages.
            if self.result_seen || matches!(self.state, ClientState::Start) {
                return Err(unexpected(Party::Client, from, &msg));
            }
            self.result_seen = true;
            return Ok(Vec::new());
        }
        let state = std::mem::replace(&mut self.state, ClientState::Done);
        match (state, from, msg) {
            (
                ClientState::Submitted,
                Party::Provider,
                ProtocolMessage::CheckRequest {
                    masked_ct,
                    provider_share,
                    canary_positions,
                },
            ) => self.on_check_request(masked_ct, provider_share, canary_positions),
            (
                ClientState::AwaitUnmask { masked },
                Party::Provider,
                ProtocolMessage::Unmask { rand, permutation },
            ) => self.on_unmask(masked, rand, permutation),
            (_, Party::Provider, ProtocolMessage::Abort { reason }) => {
                self.outcome = Some(Outcome::Aborted {
                    by: Party::Provider,
                    reason,
                });
                Ok(Vec::new())
            }
            (state, from, msg) => {
                self.state = state;
                Err(unexpected(Party::Client, from, &msg))
            }
        }
    }

    fn is_done(&self) -> bool {
        matches!(self.state, ClientState::Done) && self.result_seen
    }

    fn view(&self) -> &[ViewEntry] {
        &self.view
    }
}

struct Retained {
    plan: ShufflePlan,
    g: SlotwiseModel,
    y: SlotVector,
}

enum ProviderState {
    AwaitInput,
    AwaitResult(Option<Retained>),
    AwaitResponse {
        expected: [u8; 32],
        rand: Vec<f64>,
        plan: ShufflePlan,
    },
    Done,
}

pub struct Provider {
    scenario: Scenario,
    engine: Engine,
    keys: KeyPair,
    f: SlotwiseModel,
    state: ProviderState,
    verdict: Option<Outcome>,
    view: Vec<ViewEntry>,
}

impl Provider {
    pub fn new(scenario: &Scenario) -> Self {
        let f = scenario.provider_model();
        Provider {
            engine: Engine::new(scenario.slots, scenario.noise_model(Party::Provider)),
            keys: provider_key(scenario),
            view: vec![ViewEntry::values("f", &f.coeffs().concat())],
            f,
            scenario: scenario.clone(),
            state: ProviderState::AwaitInput,
            verdict: None,
        }
    }

    /// `Some(Aborted)` when the provider halted the session.
    pub fn verdict(&self) -> Option<&Outcome> {
        self.verdict.as_ref()
    }

    pub fn secret_material(&self) -> [u8; 32] {
        *self.keys.secret.material()
    }

    fn encrypt_params(&self, model: &SlotwiseModel) -> Result<Vec<MockCiphertext>, ProtocolError> {
        model
            .padded(self.scenario.slots)
            .coeffs()
            .iter()
            .map(|c| {
                Ok(self
                    .engine
                    .encrypt(&SlotVector::new(c.clone())?, &self.keys.public)?)
            })
            .collect()
    }

    fn on_submit(&mut self, ct: MockCiphertext) -> Result<Outbox, ProtocolError> {
        let s = self.scenario.clone();
        let (input_ct, params, retained) = match s.mode {
            Mode::Legacy => (ct, self.f.clone(), None),
            Mode::Sonni => {
                let plan = if s.hooks.identity_plan {
                    ShufflePlan::identity(s.d, s.m)
                } else {
                    shuffle::plan_shuffle(s.d, s.m, s.sub_seed(Party::Provider, "plan"))?
                };
                let shuffled = shuffle::shuffle_ciphertext(&self.engine, &ct, &plan)?;
                let g = SlotwiseModel::random(
                    s.degree,
                    s.m,
                    s.coeff_range,
                    &mut s.rng(Party::Provider, "g"),
                );
                let y =
                    workload::gen_canaries(s.m, s.input_range, s.sub_seed(Party::Provider, "y")).y;
                let full = shuffle::insert_canaries(
                    &self.engine,
                    &shuffled,
                    &y,
                    &plan,
                    &self.keys.public,
                )?;
                let permuted = shuffle::permute_parameters(&self.f, &g, &plan)?;
                self.view.push(ViewEntry::values("g", &g.coeffs().concat()));
                self.view.push(ViewEntry::values("y", y.as_slice()));
                (full, permuted, Some(Retained { plan, g, y }))
            }
        };
        let param_cts = self.encrypt_params(&params)?;
        self.state = ProviderState::AwaitResult(retained);
        Ok(vec![(
            Party::Server,
            ProtocolMessage::EvalRequest {
                input_ct,
                param_cts,
                degree: s.degree as u8,
            },
        )])
    }

    fn draw_mask(&self, retained: &Retained, canary_values: &[f64]) -> Vec<f64> {
        let s = &self.scenario;
        let active = s.active();
        if s.hooks.identity_mask {
            return vec![1.0; active];
        }
        let mut rng = s.rng(Party::Provider, "rand");
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let r: f64 = rng.gen_range(-1.0..=1.0);
            if r.abs() >= s.r_min {
                return r;
            }
        };
        let mut rand: Vec<f64> = (0..active).map(|_| draw(&mut rng)).collect();
        if s.boundary_avoidance {
            for (&pos, &gv) in retained.plan.chosen_indices().iter().zip(canary_values) {
                while boundary_distance(gv * rand[pos], s.quant_step) < BOUNDARY_MARGIN {
                    rand[pos] = draw(&mut rng);
                }
            }
        }
        rand
    }

    fn on_result(
        &mut self,
        retained: Option<Retained>,
        result_ct: MockCiphertext,
    ) -> Result<Outbox, ProtocolError> {
        let s = self.scenario.clone();
        let Some(retained) = retained else {
            // legacy: help the client open the raw result
            let provider_share = self.engine.partial_dec(&result_ct, &self.keys.secret)?;
            self.state = ProviderState::Done;
            return Ok(vec![(
                Party::Client,
                ProtocolMessage::CheckRequest {
                    masked_ct: result_ct,
                    provider_share,
                    canary_positions: Vec::new(),
                },
            )]);
        };

        let g_of_y = retained.g.eval_plain(retained.y.as_slice())?;
        let rand = self.draw_mask(&retained, &g_of_y);
        let mut mask = rand.clone();
        mask.resize(s.slots, 0.0);
        let masked_ct = self
            .engine
            .mult_plain(&result_ct, &SlotVector::new(mask)?)?;
        let provider_share = self.engine.partial_dec(&masked_ct, &self.keys.secret)?;

        let chosen = retained.plan.chosen_indices();
        let expected_values: Vec<f64> = chosen
            .iter()
            .zip(&g_of_y)
            .map(|(&p, gv)| gv * rand[p])
            .collect();
        let expected = check_digest(&expected_values, s.quant_step);
        self.view.push(ViewEntry::values("rand", &rand));
        self.view
            .push(ViewEntry::values("expected_canaries", &expected_values));

        let canary_positions: Vec<u32> = match s.strategy {
            AttackStrategy::MaliciousProviderIndices => {
                adversary::malicious_positions(&retained.plan)
            }
            _ => chosen.iter().map(|&p| p as u32).collect(),
        };
        self.state = ProviderState::AwaitResponse {
            expected,
            rand,
            plan: retained.plan,
        };
        Ok(vec![(
            Party::Client,
            ProtocolMessage::CheckRequest {
                masked_ct,
                provider_share,
                canary_positions,
            },
        )])
    }

    fn on_response(
        &mut self,
        expected: [u8; 32],
        rand: Vec<f64>,
        plan: ShufflePlan,
        digest: [u8; 32],
    ) -> Result<Outbox, ProtocolError> {
        self.view.push(ViewEntry::bytes("client_digest", &digest));
        self.state = ProviderState::Done;
        if digest != expected {
            let reason = "result check failed: canary digest mismatch".to_string();
            self.verdict = Some(Outcome::Aborted {
                by: Party::Provider,
                reason: reason.clone(),
            });
            return Ok(vec![(Party::Client, ProtocolMessage::Abort { reason })]);
        }
        let permutation = plan
            .permutation()
            .forward()
            .iter()
            .map(|&p| p as u32)
            .collect();
        Ok(vec![(
            Party::Client,
            ProtocolMessage::Unmask {
                rand: SlotVector::new(rand)?,
                permutation,
            },
        )])
    }
}

impl PartyMachine for Provider {
    fn party(&self) -> Party {
        Party::Provider
    }

    fn handle(&mut self, from: Party, msg: ProtocolMessage) -> Result<Outbox, ProtocolError> {
        let state = std::mem::replace(&mut self.state, ProviderState::Done);
        match (state, from, msg) {
            (ProviderState::AwaitInput, Party::Client, ProtocolMessage::SubmitInput { ct }) => {
                self.on_submit(ct)
            }
            (
                ProviderState::AwaitResult(retained),
                Party::Server,
                ProtocolMessage::EvalResult { result_ct },
            ) => self.on_result(retained, result_ct),
            (
                ProviderState::AwaitResponse {
                    expected,
                    rand,
                    plan,
                },
                Party::Client,
                ProtocolMessage::CheckResponse { hash_digest },
            ) => self.on_response(expected, rand, plan, hash_digest),
            (_, Party::Client, ProtocolMessage::Abort { reason }) => {
                self.verdict = Some(Outcome::Aborted {
                    by: Party::Client,
                    reason,
                });
                Ok(Vec::new())
            }
            (state, from, msg) => {
                self.state = state;
                Err(unexpected(Party::Provider, from, &msg))
            }
        }
    }

    fn is_done(&self) -> bool {
        matches!(self.state, ProviderState::Done)
    }

    fn view(&self) -> &[ViewEntry] {
        &self.view
    }
}

pub struct Server {
    scenario: Scenario,
    engine: Engine,
    client_pk: PublicKey,
    done: bool,
    targeted: Vec<usize>,
}

impl Server {
    pub fn new(scenario: &Scenario) -> Self {
        Server {
            engine: Engine::new(scenario.slots, scenario.noise_model(Party::Server)),
            client_pk: PublicKey { id: KeyId::CLIENT },
            scenario: scenario.clone(),
            done: false,
            targeted: Vec::new(),
        }
    }

    /// Slots the server overwrote, in the layout it saw.
    pub fn targeted_slots(&self) -> &[usize] {
        &self.targeted
    }
}

impl PartyMachine for Server {
    fn party(&self) -> Party {
        Party::Server
    }

    fn handle(&mut self, from: Party, msg: ProtocolMessage) -> Result<Outbox, ProtocolError> {
        match (self.done, from, msg) {
            (
                false,
                Party::Provider,
                ProtocolMessage::EvalRequest {
                    input_ct,
                    param_cts,
                    degree,
                },
            ) => {
                if param_cts.len() != degree as usize + 1 {
                    return Err(ProtocolError::Invalid(format!(
                        "degree {degree} with {} parameter ciphertexts",
                        param_cts.len()
                    )));
                }
                let honest = workload::eval_encrypted(&self.engine, &param_cts, &input_ct)?;
                let (result_ct, targeted) = adversary::server_result(
                    &self.scenario,
                    &self.engine,
                    &self.client_pk,
                    honest,
                    &param_cts,
                )?;
                self.targeted = targeted;
                self.done = true;
                Ok(vec![
                    (
                        Party::Client,
                        ProtocolMessage::EvalResult {
                            result_ct: result_ct.clone(),
                        },
                    ),
                    (Party::Provider, ProtocolMessage::EvalResult { result_ct }),
                ])
            }
            (_, from, msg) => Err(unexpected(Party::Server, from, &msg)),
        }
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn view(&self) -> &[ViewEntry] {
        &[]
    }
}
