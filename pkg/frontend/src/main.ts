/**
 * Entry point: mount the explorer against the service named by the
 * ?service= query parameter (default http://127.0.0.1:8787).
 */

import { ApiClient } from "./api.js";
import { mountExplorer } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8787";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

void mountExplorer(root, new ApiClient(baseUrl), {}, window.location.hash);
