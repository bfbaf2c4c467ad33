// Shapes returned by the review service API.

export type SessionStatus = 'queued' | 'processing' | 'complete' | 'failed';

export interface OverrideEntry {
  value: string;
  value_kind: string;
  note: string;
  version: number;
  provenance: 'human_override';
}

export interface FieldEntry {
  field_id: string;
  display_name: string;
  value_kind_spec: 'categorical' | 'count' | 'length_mm' | 'free_text';
  allowed_values: string[];
  other_escape: boolean;
  value: string;
  value_kind: string;
  provenance: string;
  raw_confidence: number;
  calibrated_confidence: number | null;
  display_confidence: number;
  degraded: boolean;
  failed: boolean;
  override: OverrideEntry | null;
}

export interface SessionWarning {
  code: string;
  message: string;
  fields_involved: string[];
}

export interface SessionView {
  report_id: string;
  status: SessionStatus;
  version: number;
  error?: string;
  source?: string;
  backend_id?: string;
  fields?: Record<string, FieldEntry>;
  warnings?: SessionWarning[];
}

export interface SubmitResponse {
  report_id: string;
  status: SessionStatus;
}
