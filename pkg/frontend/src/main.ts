import { ApiClient } from "./api.js";
import { SessionScreen } from "./session.js";

// ?api=http://host:port points the client at a service on another origin;
// the default is same-origin.
function serviceBase(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "";
}

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  const screen = new SessionScreen(root, new ApiClient(serviceBase()));
  screen.init().catch((error: unknown) => {
    root.textContent = `Could not reach the session service: ${String(error)}`;
  });
});
