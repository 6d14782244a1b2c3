/** Wire types mirroring the twinqa service responses. */

export type QaStateName =
  | "Pending"
  | "Provisional"
  | "Released"
  | "Hold"
  | "NonConformance";

export type RoleName = "Inspector" | "Engineer" | "QaManager";

export type DecisionAction =
  | "release"
  | "hold"
  | "lift_hold"
  | "open_ncr"
  | "close_ncr";

export interface SessionInfo {
  actor: string;
  role: RoleName;
}

export interface WarningInfo {
  kind: string;
  element: string;
  detail: string;
  raised_at: string;
}

export interface ElementSummary {
  id: string;
  kind: string;
  state: QaStateName;
  since: string;
  basis: string;
  recommended: QaStateName;
  gate_open: boolean;
  warnings: WarningInfo[];
  station_m: number | null;
  offset_m: number | null;
  design_strength_mpa: number | null;
  planned_placement: string;
}

export interface CompletenessInfo {
  satisfied: boolean;
  missing: { code: string; phase: string }[];
  failed: string[];
  out_of_sequence: string[];
  ruleset_version: string;
}

export interface PredictionInfo {
  mean_mpa: number;
  lower_mpa: number;
  upper_mpa: number;
  maturity_degc_h: number;
  basis: string;
}

export interface MaterialInfo {
  status: string;
  prediction: PredictionInfo | null;
  measured: { strength_mpa: number; age_days: number; cured: string }[];
  ruleset_version: string;
}

export interface ElementDetail extends ElementSummary {
  rationale: string;
  recommendation_rationale: string;
  completeness: CompletenessInfo;
  material: MaterialInfo;
  maturity_degc_h: number | null;
  event_counts: Record<string, number>;
}

export interface AuditEntry {
  seq: number;
  at: string;
  actor: string;
  role: string;
  element: string;
  from: QaStateName;
  to: QaStateName;
  rationale: string;
  evidence_refs: string[];
  ruleset_version: string;
  outcome: "accepted" | "rejected";
}

export interface StateRecord {
  element: string;
  state: QaStateName;
  since: string;
  basis: string;
  rationale: string;
  ruleset_version: string;
}

export interface CurvePoint {
  at: string;
  hours_from_start: number;
  mean_mpa: number;
  lower_mpa: number;
  upper_mpa: number;
}

export interface MeasuredPoint {
  age_days: number;
  strength_mpa: number;
  cured: string;
}

export interface WhatIfResponse {
  element: string;
  reachable: boolean;
  forecast_at: string | null;
  hours_from_start: number | null;
  threshold_mpa: number;
  assumed_temp_c: number;
  curve: CurvePoint[];
  measured: MeasuredPoint[];
}

/** Non-2xx decision/what-if responses carry a machine-readable reason. */
export interface ApiError {
  status: number;
  reason: string;
  predecessors?: string[];
  from?: string;
  action?: string;
  role?: string;
}

export interface IngestReport {
  accepted: number;
  duplicates: number;
  quarantined: { record: unknown; reason: string }[];
  unit_conversions: number;
}
