// Confidence banding is pure UI policy: thresholds are configuration,
// not properties of the extraction pipeline.

export type Band = 'high' | 'medium' | 'low';

export interface BandThresholds {
  high: number; // band is high when confidence >= high
  medium: number; // medium when confidence >= medium; low below
}

export const DEFAULT_THRESHOLDS: BandThresholds = { high: 0.9, medium: 0.7 };

export function confidenceBand(
  confidence: number,
  thresholds: BandThresholds = DEFAULT_THRESHOLDS,
): Band {
  if (!Number.isFinite(confidence)) {
    return 'low';
  }
  if (confidence >= thresholds.high) {
    return 'high';
  }
  if (confidence >= thresholds.medium) {
    return 'medium';
  }
  return 'low';
}

// Whole-percent rendering, matching the proforma's rounding.
export function confidencePercent(confidence: number): string {
  return `${Math.round(confidence * 100)}%`;
}
