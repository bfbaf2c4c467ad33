// Shared test fixtures: a canned 11-field session and a scripted
// in-memory service good enough to drive the app without a network.

import type { FieldEntry, SessionView } from '../src/types.js';

export const FIELD_DEFS: Array<{
  id: string;
  name: string;
  kind: FieldEntry['value_kind_spec'];
  vocab: string[];
  escape: boolean;
  value: string;
  confidence: number;
}> = [
  { id: 'specimen_type', name: 'Specimen type', kind: 'categorical', vocab: ['Right hemicolectomy', 'Anterior resection'], escape: true, value: 'Right hemicolectomy', confidence: 0.96 },
  { id: 'tumour_type', name: 'Tumour type', kind: 'categorical', vocab: ['Adenocarcinoma', 'Mucinous adenocarcinoma'], escape: true, value: 'Adenocarcinoma', confidence: 0.95 },
  { id: 'tumour_site', name: 'Tumour site', kind: 'categorical', vocab: ['Caecum', 'Rectum', 'Sigmoid colon'], escape: true, value: 'Caecum', confidence: 0.94 },
  { id: 'maximum_diameter', name: 'Maximum tumour diameter', kind: 'length_mm', vocab: [], escape: false, value: '45 mm', confidence: 0.92 },
  { id: 'local_invasion', name: 'Local invasion status', kind: 'categorical', vocab: ['pTis', 'pT1', 'pT2', 'pT3', 'pT4a', 'pT4b'], escape: false, value: 'pT3', confidence: 0.52 },
  { id: 'histologic_grade', name: 'Histologic grade', kind: 'categorical', vocab: ['Low', 'High'], escape: false, value: 'High', confidence: 0.97 },
  { id: 'examined_nodes', name: 'Number of examined lymph nodes', kind: 'count', vocab: [], escape: false, value: '17', confidence: 0.93 },
  { id: 'metastatic_nodes', name: 'Number of metastatic nodes', kind: 'count', vocab: [], escape: false, value: '2', confidence: 0.91 },
  { id: 'lymph_node_status', name: 'Lymph node status', kind: 'categorical', vocab: ['pN0', 'pN1a', 'pN1b', 'pN1c', 'pN2a', 'pN2b'], escape: false, value: 'pN1b', confidence: 0.88 },
  { id: 'distant_metastasis', name: 'Distant metastatic disease status', kind: 'categorical', vocab: ['pM0 (not identified)', 'pM1'], escape: false, value: 'pM0 (not identified)', confidence: 0.9 },
  { id: 'resection_status', name: 'Resection status', kind: 'categorical', vocab: ['R0', 'R1', 'R2'], escape: false, value: 'R0', confidence: 0.95 },
];

export function cannedSession(reportId = 'report-0001'): SessionView {
  const fields: Record<string, FieldEntry> = {};
  for (const def of FIELD_DEFS) {
    fields[def.id] = {
      field_id: def.id,
      display_name: def.name,
      value_kind_spec: def.kind,
      allowed_values: def.vocab,
      other_escape: def.escape,
      value: def.value,
      value_kind: def.kind === 'categorical' ? 'canonical' : def.kind,
      provenance: 'extractor',
      raw_confidence: def.confidence,
      calibrated_confidence: null,
      display_confidence: def.confidence,
      degraded: false,
      failed: false,
      override: null,
    };
  }
  return {
    report_id: reportId,
    status: 'complete',
    version: 0,
    source: 'text_file',
    backend_id: 'mock',
    fields,
    warnings: [],
  };
}

export interface FakeService {
  fetchImpl: (url: string, init?: RequestInit) => Promise<Response>;
  patchCount: () => number;
  requests: Array<{ method: string; url: string }>;
}

/** Minimal scripted service: one session, overrides recorded in memory. */
export function fakeService(options: { pollsBeforeComplete?: number } = {}): FakeService {
  const session = cannedSession();
  const requests: Array<{ method: string; url: string }> = [];
  let patches = 0;
  let polls = 0;
  const pollsBeforeComplete = options.pollsBeforeComplete ?? 1;

  const json = (body: unknown, status = 200) =>
    new Response(JSON.stringify(body), {
      status,
      headers: { 'content-type': 'application/json' },
    });

  const fetchImpl = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = (init?.method ?? 'GET').toUpperCase();
    requests.push({ method, url });
    if (method === 'POST' && url.endsWith('/api/reports')) {
      return json({ report_id: session.report_id, status: 'queued' }, 202);
    }
    if (method === 'GET' && url.endsWith(`/api/reports/${session.report_id}`)) {
      polls += 1;
      if (polls < pollsBeforeComplete) {
        return json({ report_id: session.report_id, status: 'processing', version: 0 });
      }
      return json(session);
    }
    if (method === 'PATCH') {
      const fieldId = url.split('/').pop()!;
      const entry = session.fields?.[fieldId];
      if (!entry) return json({ detail: 'unknown field' }, 404);
      const body = JSON.parse(String(init?.body)) as { value: string; note: string };
      if (body.value === 'banana') {
        return json({ detail: "value 'banana' fails normalisation" }, 422);
      }
      patches += 1;
      entry.override = {
        value: body.value,
        value_kind: 'canonical',
        note: body.note,
        version: patches,
        provenance: 'human_override',
      };
      return json(entry);
    }
    if (method === 'GET' && url.includes('/export')) {
      if (url.includes('format=proforma')) {
        const lines = FIELD_DEFS.map((def) => {
          const entry = session.fields![def.id];
          const value = entry.override?.value ?? entry.value;
          const suffix = entry.override ? ' (reviewer override)' : '';
          return `${def.name}: ${value}${suffix}`;
        });
        return new Response(lines.join('\n') + '\n', {
          status: 200,
          headers: { 'content-type': 'text/plain' },
        });
      }
      return json({ ...session, exported_at: '2026-01-01T00:00:00' });
    }
    return json({ detail: 'unknown route' }, 404);
  };

  return { fetchImpl, patchCount: () => patches, requests };
}

export function textFile(name = 'case.txt', content = 'Adenocarcinoma of the caecum.'): File {
  return new File([content], name, { type: 'text/plain' });
}

export async function waitUntil(
  predicate: () => boolean,
  timeoutMs = 30_000,
  stepMs = 20,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, stepMs));
  }
  throw new Error('condition never became true');
}
