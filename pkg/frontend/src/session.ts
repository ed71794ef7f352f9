/** Login state: one agent, one token, one server. */

import { Api, ItemRefDoc } from "./api.js";

export interface ConsoleSession {
  api: Api;
  agent: ItemRefDoc;
}

export async function login(baseUrl: string, agentName: string): Promise<ConsoleSession> {
  const api = new Api(baseUrl);
  const agent = await api.login(agentName);
  return { api, agent };
}
