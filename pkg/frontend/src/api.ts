// Thin typed client for the review service. Every call goes through the
// injected fetch so tests can observe or stub traffic.

import type { FieldEntry, SessionView, SubmitResponse } from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface ApiClientOptions {
  baseUrl?: string;
  authToken?: string | null;
  fetchImpl?: FetchLike;
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

// Some DOM implementations ship File without Blob.text(); fall back to
// the classic FileReader path there.
function readFileText(file: File): Promise<string> {
  if (typeof file.text === 'function') {
    return file.text();
  }
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(String(reader.result ?? ''));
    reader.onerror = () => reject(reader.error ?? new Error('file read failed'));
    reader.readAsText(file);
  });
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly authToken: string | null;
  private readonly fetchImpl: FetchLike;

  constructor(options: ApiClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? '').replace(/\/$/, '');
    this.authToken = options.authToken ?? null;
    this.fetchImpl = options.fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const headers: Record<string, string> = { ...extra };
    if (this.authToken) {
      headers['authorization'] = `Bearer ${this.authToken}`;
    }
    return headers;
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response;
  }

  /** Upload a report; text files go as a plain body, images as multipart. */
  async uploadReport(file: File): Promise<SubmitResponse> {
    const isText = /\.(txt|text)$/i.test(file.name) || file.type.startsWith('text/');
    let init: RequestInit;
    if (isText) {
      init = {
        method: 'POST',
        headers: this.headers({ 'content-type': 'text/plain' }),
        body: await readFileText(file),
      };
    } else {
      const form = new FormData();
      form.append('file', file, file.name);
      init = { method: 'POST', headers: this.headers(), body: form };
    }
    const response = await this.request('/api/reports', init);
    return (await response.json()) as SubmitResponse;
  }

  async getSession(reportId: string): Promise<SessionView> {
    const response = await this.request(`/api/reports/${reportId}`, {
      headers: this.headers(),
    });
    return (await response.json()) as SessionView;
  }

  /** Poll until the session completes or fails. */
  async waitForResult(
    reportId: string,
    options: { intervalMs?: number; timeoutMs?: number; onTick?: (s: SessionView) => void } = {},
  ): Promise<SessionView> {
    const intervalMs = options.intervalMs ?? 1000;
    const timeoutMs = options.timeoutMs ?? 300_000;
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const session = await this.getSession(reportId);
      options.onTick?.(session);
      if (session.status === 'complete' || session.status === 'failed') {
        return session;
      }
      if (Date.now() > deadline) {
        throw new Error(`timed out waiting for report ${reportId}`);
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async overrideField(
    reportId: string,
    fieldId: string,
    value: string,
    note: string,
  ): Promise<FieldEntry> {
    const response = await this.request(`/api/reports/${reportId}/fields/${fieldId}`, {
      method: 'PATCH',
      headers: this.headers({ 'content-type': 'application/json' }),
      body: JSON.stringify({ value, note }),
    });
    return (await response.json()) as FieldEntry;
  }

  async exportProforma(reportId: string): Promise<string> {
    const response = await this.request(
      `/api/reports/${reportId}/export?format=proforma`,
      { headers: this.headers() },
    );
    return await response.text();
  }

  async exportJson(reportId: string): Promise<unknown> {
    const response = await this.request(`/api/reports/${reportId}/export?format=json`, {
      headers: this.headers(),
    });
    return await response.json();
  }
}
