import { ApiClient } from './api.js';
import { createApp } from './app.js';

// Same-origin deployment by default; set window.PATHPROFORMA_API to point
// elsewhere (e.g. http://localhost:8000) during development.
declare global {
  interface Window {
    PATHPROFORMA_API?: string;
    PATHPROFORMA_TOKEN?: string;
  }
}

window.addEventListener('DOMContentLoaded', () => {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app mount point');
  const api = new ApiClient({
    baseUrl: window.PATHPROFORMA_API ?? '',
    authToken: window.PATHPROFORMA_TOKEN ?? null,
  });
  createApp(root, { api });
});
