// Review application: upload a report, watch progress, review each
// field with its confidence band, override values, export results.
//
// The UI never invents values: everything shown comes from the service
// response, and accepting a field is purely visual (no network call).

import { ApiClient, ApiError } from './api.js';
import { Band, BandThresholds, confidenceBand, confidencePercent, DEFAULT_THRESHOLDS } from './bands.js';
import type { FieldEntry, SessionView } from './types.js';

export interface DownloadFn {
  (filename: string, content: string, mime: string): void;
}

export interface AppOptions {
  api: ApiClient;
  thresholds?: BandThresholds;
  maxUploadBytes?: number;
  pollIntervalMs?: number;
  download?: DownloadFn;
}

const ACCEPTED_KINDS = ['.txt', '.text', '.png', '.jpg', '.jpeg'];

function browserDownload(filename: string, content: string, mime: string): void {
  const blob = new Blob([content], { type: mime });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement('a');
  anchor.href = url;
  anchor.download = filename;
  anchor.click();
  URL.revokeObjectURL(url);
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = '',
  text = '',
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class App {
  private readonly api: ApiClient;
  private readonly thresholds: BandThresholds;
  private readonly maxUploadBytes: number;
  private readonly pollIntervalMs: number;
  private readonly download: DownloadFn;

  private session: SessionView | null = null;
  private accepted = new Set<string>();

  private readonly uploadPanel: HTMLElement;
  private readonly statusPanel: HTMLElement;
  private readonly errorPanel: HTMLElement;
  private readonly reviewPanel: HTMLElement;
  private readonly fileInput: HTMLInputElement;

  constructor(root: HTMLElement, options: AppOptions) {
    this.api = options.api;
    this.thresholds = options.thresholds ?? DEFAULT_THRESHOLDS;
    this.maxUploadBytes = options.maxUploadBytes ?? 1_000_000;
    this.pollIntervalMs = options.pollIntervalMs ?? 1000;
    this.download = options.download ?? browserDownload;

    root.innerHTML = '';
    this.uploadPanel = el('section', 'upload-panel');
    this.statusPanel = el('section', 'status-panel');
    this.errorPanel = el('section', 'error-panel hidden');
    this.reviewPanel = el('section', 'review-panel');
    root.append(this.uploadPanel, this.statusPanel, this.errorPanel, this.reviewPanel);

    this.fileInput = el('input') as HTMLInputElement;
    this.fileInput.type = 'file';
    this.fileInput.accept = ACCEPTED_KINDS.join(',');
    this.fileInput.dataset.role = 'file-input';
    this.fileInput.addEventListener('change', () => {
      const file = this.fileInput.files?.[0];
      if (file) void this.handleUpload(file);
    });

    const dropZone = el('div', 'drop-zone', 'Drop a report here or choose a file');
    dropZone.dataset.role = 'drop-zone';
    dropZone.addEventListener('dragover', (event) => event.preventDefault());
    dropZone.addEventListener('drop', (event) => {
      event.preventDefault();
      const file = event.dataTransfer?.files?.[0];
      if (file) void this.handleUpload(file);
    });

    const hint = el(
      'p',
      'upload-hint',
      'Accepted: .txt text reports and .png/.jpg scans. Anonymise patient details first.',
    );
    this.uploadPanel.append(dropZone, this.fileInput, hint);
  }

  // -- upload and polling -------------------------------------------------

  async handleUpload(file: File): Promise<void> {
    this.clearError();
    if (file.size > this.maxUploadBytes) {
      this.showError(
        `File is ${file.size} bytes; the limit is ${this.maxUploadBytes}. ` +
          'Split the report or raise the service limit.',
      );
      return;
    }
    const suffixOk = ACCEPTED_KINDS.some((ext) => file.name.toLowerCase().endsWith(ext));
    if (!suffixOk) {
      this.showError(`Unsupported file type: ${file.name}. Use .txt, .png or .jpg.`);
      return;
    }
    this.setStatus('uploading', `Uploading ${file.name}...`);
    try {
      const submitted = await this.api.uploadReport(file);
      this.setStatus('queued', `Report ${submitted.report_id}: queued`);
      const session = await this.api.waitForResult(submitted.report_id, {
        intervalMs: this.pollIntervalMs,
        onTick: (view) =>
          this.setStatus(view.status, `Report ${submitted.report_id}: ${view.status}`),
      });
      if (session.status === 'failed') {
        this.showError(`Processing failed: ${session.error ?? 'unknown error'}`, true);
        return;
      }
      this.session = session;
      this.accepted = new Set();
      this.renderReview();
      this.setStatus('complete', `Report ${session.report_id}: complete`);
    } catch (error) {
      this.showError(this.describeError(error), true);
    }
  }

  private describeError(error: unknown): string {
    if (error instanceof ApiError) {
      if (error.status === 413) return `The service rejected the upload as too large: ${error.detail}`;
      if (error.status === 415) return `The service rejected the file type: ${error.detail}`;
      if (error.status === 401) return 'The service requires a valid access token.';
      return `The service answered ${error.status}: ${error.detail}`;
    }
    return error instanceof Error ? error.message : String(error);
  }

  private setStatus(state: string, message: string): void {
    this.statusPanel.dataset.state = state;
    this.statusPanel.textContent = message;
  }

  private showError(message: string, retryable = false): void {
    this.errorPanel.classList.remove('hidden');
    this.errorPanel.innerHTML = '';
    this.errorPanel.append(el('p', 'error-message', message));
    if (retryable) {
      const retry = el('button', 'retry', 'Try again');
      retry.dataset.role = 'retry';
      retry.addEventListener('click', () => {
        this.clearError();
        this.fileInput.value = '';
        this.setStatus('idle', '');
      });
      this.errorPanel.append(retry);
    }
    this.setStatus('error', '');
  }

  private clearError(): void {
    this.errorPanel.classList.add('hidden');
    this.errorPanel.innerHTML = '';
  }

  // -- review table ---------------------------------------------------------

  private orderedFields(): FieldEntry[] {
    if (!this.session?.fields) return [];
    return Object.values(this.session.fields);
  }

  private bandFor(entry: FieldEntry): Band {
    return confidenceBand(entry.display_confidence, this.thresholds);
  }

  private renderReview(): void {
    const session = this.session;
    if (!session?.fields) return;
    this.reviewPanel.innerHTML = '';

    const heading = el('h2', '', `Review: ${session.report_id}`);
    this.reviewPanel.append(heading);

    const warnings = session.warnings ?? [];
    if (warnings.length) {
      const list = el('ul', 'warnings');
      for (const warning of warnings) {
        list.append(el('li', `warning warning-${warning.code}`, warning.message));
      }
      this.reviewPanel.append(list);
    }

    const toolbar = el('div', 'toolbar');
    const acceptAll = el('button', '', 'Accept all');
    acceptAll.dataset.role = 'accept-all';
    acceptAll.addEventListener('click', () => {
      for (const entry of this.orderedFields()) this.accepted.add(entry.field_id);
      this.refreshRows();
    });
    const exportProforma = el('button', '', 'Export proforma');
    exportProforma.dataset.role = 'export-proforma';
    exportProforma.addEventListener('click', () => void this.exportProforma());
    const exportJson = el('button', '', 'Export JSON');
    exportJson.dataset.role = 'export-json';
    exportJson.addEventListener('click', () => void this.exportJson());
    toolbar.append(acceptAll, exportProforma, exportJson);
    this.reviewPanel.append(toolbar);

    const table = el('table', 'review-table');
    table.dataset.role = 'review-table';
    const head = el('tr');
    for (const title of ['Field', 'Model value', 'Confidence', 'Review']) {
      head.append(el('th', '', title));
    }
    table.append(head);
    for (const entry of this.orderedFields()) {
      table.append(this.buildRow(entry));
    }
    this.reviewPanel.append(table);

    const firstLow = this.orderedFields().find((entry) => this.bandFor(entry) === 'low');
    if (firstLow) {
      const control = this.reviewPanel.querySelector<HTMLElement>(
        `[data-field="${firstLow.field_id}"] [data-role="override-value"]`,
      );
      control?.focus();
    }
  }

  private buildRow(entry: FieldEntry): HTMLTableRowElement {
    const band = this.bandFor(entry);
    const row = el('tr', `field-row band-${band}`) as HTMLTableRowElement;
    row.dataset.field = entry.field_id;
    if (band === 'low') row.classList.add('flagged');

    row.append(el('td', 'field-name', entry.display_name));

    const valueCell = el('td', 'model-value');
    valueCell.append(el('span', 'value-text', entry.value));
    if (entry.degraded) valueCell.append(el('span', 'degraded-note', ' (degraded)'));
    if (entry.failed) valueCell.append(el('span', 'failed-note', ' (failed)'));
    row.append(valueCell);

    const confidenceCell = el('td', 'confidence');
    const badge = el('span', `badge badge-${band}`, confidencePercent(entry.display_confidence));
    badge.dataset.role = 'confidence-badge';
    badge.dataset.band = band;
    confidenceCell.append(badge);
    row.append(confidenceCell);

    const reviewCell = el('td', 'review-cell');
    if (entry.override) {
      const note = entry.override.note ? ` - ${entry.override.note}` : '';
      const state = el(
        'span',
        'override-state',
        `overridden to ${entry.override.value}${note}`,
      );
      state.dataset.role = 'override-state';
      reviewCell.append(state);
    } else if (this.accepted.has(entry.field_id)) {
      const state = el('span', 'accepted-state', 'accepted');
      state.dataset.role = 'accepted-state';
      reviewCell.append(state);
    } else {
      reviewCell.append(this.buildOverrideControls(entry));
    }
    row.append(reviewCell);
    return row;
  }

  private buildOverrideControls(entry: FieldEntry): HTMLElement {
    const wrapper = el('span', 'override-controls');

    let valueControl: HTMLSelectElement | HTMLInputElement;
    if (entry.value_kind_spec === 'categorical' && !entry.other_escape) {
      const select = el('select') as HTMLSelectElement;
      for (const option of [...entry.allowed_values, 'Not Available']) {
        const node = el('option', '', option) as HTMLOptionElement;
        node.value = option;
        select.append(node);
      }
      valueControl = select;
    } else {
      const input = el('input') as HTMLInputElement;
      input.type = 'text';
      input.placeholder =
        entry.value_kind_spec === 'count'
          ? 'integer'
          : entry.value_kind_spec === 'length_mm'
            ? 'e.g. 45 mm'
            : 'value';
      const preview = el('span', 'normalisation-preview');
      preview.dataset.role = 'normalisation-preview';
      input.addEventListener('input', () => {
        const trimmed = input.value.trim();
        preview.textContent = trimmed ? `stored as "${trimmed}"` : '';
      });
      valueControl = input;
      wrapper.append(preview);
    }
    valueControl.dataset.role = 'override-value';

    const note = el('input') as HTMLInputElement;
    note.type = 'text';
    note.placeholder = 'reviewer note';
    note.dataset.role = 'override-note';

    const apply = el('button', '', 'Override');
    apply.dataset.role = 'override-apply';
    apply.addEventListener('click', () => void this.applyOverride(entry, valueControl, note));

    const accept = el('button', '', 'Accept');
    accept.dataset.role = 'accept';
    accept.addEventListener('click', () => {
      this.accepted.add(entry.field_id);
      this.refreshRows();
    });

    wrapper.prepend(valueControl, note, apply, accept);
    return wrapper;
  }

  private async applyOverride(
    entry: FieldEntry,
    control: HTMLSelectElement | HTMLInputElement,
    note: HTMLInputElement,
  ): Promise<void> {
    const session = this.session;
    if (!session?.fields) return;
    const value = control.value.trim();
    if (!value) return;
    try {
      const updated = await this.api.overrideField(
        session.report_id,
        entry.field_id,
        value,
        note.value.trim(),
      );
      session.fields[entry.field_id] = updated;
      session.version = Math.max(session.version, updated.override?.version ?? 0);
      this.refreshRows();
    } catch (error) {
      const row = this.reviewPanel.querySelector(`[data-field="${entry.field_id}"]`);
      const cell = row?.querySelector('.review-cell');
      if (cell) {
        let inline = cell.querySelector<HTMLElement>('[data-role="row-error"]');
        if (!inline) {
          inline = el('span', 'row-error');
          inline.dataset.role = 'row-error';
          cell.append(inline);
        }
        inline.textContent =
          error instanceof ApiError && error.status === 422
            ? `Rejected: ${error.detail}`
            : this.describeError(error);
      }
    }
  }

  private refreshRows(): void {
    const table = this.reviewPanel.querySelector('[data-role="review-table"]');
    if (!table) return;
    const rows = Array.from(table.querySelectorAll('tr.field-row'));
    for (const row of rows) row.remove();
    for (const entry of this.orderedFields()) {
      table.append(this.buildRow(entry));
    }
  }

  // -- exports ---------------------------------------------------------------

  private async exportProforma(): Promise<void> {
    if (!this.session) return;
    try {
      const text = await this.api.exportProforma(this.session.report_id);
      this.download(`${this.session.report_id}.proforma.txt`, text, 'text/plain');
    } catch (error) {
      this.showError(this.describeError(error));
    }
  }

  private async exportJson(): Promise<void> {
    if (!this.session) return;
    try {
      const body = await this.api.exportJson(this.session.report_id);
      this.download(
        `${this.session.report_id}.json`,
        JSON.stringify(body, null, 2),
        'application/json',
      );
    } catch (error) {
      this.showError(this.describeError(error));
    }
  }
}

export function createApp(root: HTMLElement, options: AppOptions): App {
  return new App(root, options);
}
